#pragma once

#include "chaosaic/dynsys.hpp"
#include "chaosaic/sigmodel.hpp"
#include "chaosaic/chaomod.hpp"
#include "chaosaic/irnls.hpp"
#include "chaosaic/slle.hpp"
#include "chaosaic/rdemod.hpp"
#include "chaosaic/xharness.hpp"
