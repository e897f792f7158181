#pragma once

#include "memix/errors.hpp"
#include "memix/prng.hpp"
#include "memix/tensor.hpp"
#include "memix/decoder.hpp"
#include "memix/gates.hpp"
#include "memix/routing.hpp"
#include "memix/harness.hpp"
#include "memix/equivalence.hpp"
#include "memix/config.hpp"
#include "memix/io.hpp"
#include "memix/cli.hpp"
