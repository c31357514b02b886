#pragma once

#include "mortsurf/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mortsurf::csv {

/// Rows of a comma-delimited file. Lines starting with '#' are comments and
/// skipped; the first non-comment line must equal `header`.
inline std::vector<std::vector<std::string>> read_table(const std::string& path,
                                                        const std::string& header) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!saw_header) {
            if (line != header)
                throw DataError("unexpected header in " + path + ": got \"" + line +
                                "\", expected \"" + header + "\"");
            saw_header = true;
            continue;
        }
        std::vector<std::string> fields;
        std::string field;
        std::stringstream ss(line);
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        rows.push_back(std::move(fields));
    }
    if (!saw_header) throw DataError("empty file (no header): " + path);
    return rows;
}

inline long parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("cannot parse " + what + " from \"" + s + "\"");
    }
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("cannot parse " + what + " from \"" + s + "\"");
    }
}

/// Shortest decimal representation that round-trips a double exactly.
inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class Writer {
  public:
    Writer(const std::string& path, const std::string& comment, const std::string& header)
        : out_(path) {
        if (!out_) throw DataError("cannot write file: " + path);
        if (!comment.empty()) out_ << "# " << comment << "\n";
        out_ << header << "\n";
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << "\n";
    }

  private:
    std::ofstream out_;
};

} // namespace mortsurf::csv
