#pragma once
#include "numerics.hpp"
#include "rng.hpp"
#include "expfam.hpp"
#include "domain.hpp"
#include "designs.hpp"
#include "engine.hpp"
#include "bounds.hpp"
#include "config.hpp"
#include "io.hpp"
