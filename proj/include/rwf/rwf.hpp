#pragma once

#include "rwf/characteristics.hpp"
#include "rwf/elastic_tensors.hpp"
#include "rwf/experiment.hpp"
#include "rwf/forward_solver.hpp"
#include "rwf/geometry.hpp"
#include "rwf/honeycomb.hpp"
#include "rwf/inverse_solver.hpp"
#include "rwf/mesh.hpp"
#include "rwf/rwf_core.hpp"
#include "rwf/vtk.hpp"
