// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "equinet/activation.hpp"
#include "equinet/cascade.hpp"
#include "equinet/circuit.hpp"
#include "equinet/errors.hpp"
#include "equinet/extraction.hpp"
#include "equinet/gradient.hpp"
#include "equinet/io.hpp"
#include "equinet/kernel.hpp"
#include "equinet/solver.hpp"
#include "equinet/training.hpp"
