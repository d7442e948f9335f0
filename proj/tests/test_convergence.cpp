#include <catch2/catch_amalgamated.hpp>
#include "mmspec/mmspec.hpp"
