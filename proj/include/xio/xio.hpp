#pragma once

#include "xio/autodiff.hpp"
#include "xio/checkpoint.hpp"
#include "xio/config.hpp"
#include "xio/displacement_net.hpp"
#include "xio/error.hpp"
#include "xio/evalkit.hpp"
#include "xio/geometry.hpp"
#include "xio/imu.hpp"
#include "xio/pipeline.hpp"
#include "xio/platform_router.hpp"
#include "xio/simkit.hpp"
#include "xio/state_estimator.hpp"
#include "xio/training.hpp"
