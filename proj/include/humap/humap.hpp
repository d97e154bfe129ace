#ifndef HUMAP_HUMAP_HPP
#define HUMAP_HUMAP_HPP

#include "common.hpp"
#include "config.hpp"
#include "data_matrix.hpp"
#include "fuzzy_graph.hpp"
#include "graph.hpp"
#include "hierarchy.hpp"
#include "layout.hpp"
#include "metrics.hpp"
#include "persistence.hpp"
#include "projection.hpp"

#endif
