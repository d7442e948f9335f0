#pragma once

#include "mmspec/common.hpp"
#include "mmspec/convergence.hpp"
#include "mmspec/energy.hpp"
#include "mmspec/flow.hpp"
#include "mmspec/minnorm.hpp"
#include "mmspec/space.hpp"
#include "mmspec/spectrum.hpp"
#include "mmspec/sphere.hpp"
#include "mmspec/transport.hpp"
