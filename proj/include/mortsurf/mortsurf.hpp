#pragma once

#include "mortsurf/array3.hpp"
#include "mortsurf/artifact.hpp"
#include "mortsurf/basis.hpp"
#include "mortsurf/config.hpp"
#include "mortsurf/csv.hpp"
#include "mortsurf/data.hpp"
#include "mortsurf/errors.hpp"
#include "mortsurf/glam.hpp"
#include "mortsurf/inference.hpp"
#include "mortsurf/lifetable.hpp"
#include "mortsurf/penalty.hpp"
#include "mortsurf/simulate.hpp"
#include "mortsurf/solver.hpp"
#include "mortsurf/version.hpp"
