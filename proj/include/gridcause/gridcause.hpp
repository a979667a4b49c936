#pragma once

#include "gridcause/error.hpp"
#include "gridcause/io.hpp"
#include "gridcause/panel.hpp"
#include "gridcause/synth.hpp"
#include "gridcause/var.hpp"
#include "gridcause/granger.hpp"
#include "gridcause/netgraph.hpp"
#include "gridcause/partition.hpp"
#include "gridcause/percolation.hpp"
#include "gridcause/vulnerability.hpp"
#include "gridcause/svg.hpp"
