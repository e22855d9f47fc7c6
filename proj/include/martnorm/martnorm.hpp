#pragma once

#include "martnorm/filtration.hpp"
#include "martnorm/partitions.hpp"
#include "martnorm/decomposition.hpp"
#include "martnorm/drbsde.hpp"
#include "martnorm/gexp.hpp"
#include "martnorm/generators.hpp"
#include "martnorm/io.hpp"
#include "martnorm/suite.hpp"
