#pragma once

// Everything in one include.
#include "hbubble/grid.hpp"
#include "hbubble/sht.hpp"
#include "hbubble/map.hpp"
#include "hbubble/field.hpp"
#include "hbubble/functionals.hpp"
#include "hbubble/melnikov.hpp"
#include "hbubble/parallel.hpp"
#include "hbubble/reduction.hpp"
#include "hbubble/diagnostics.hpp"
#include "hbubble/io.hpp"
#include "hbubble/config.hpp"
#include "hbubble/commands.hpp"
