#pragma once

#include "dtdbd/autodiff.hpp"
#include "dtdbd/checkpoint.hpp"
#include "dtdbd/cli.hpp"
#include "dtdbd/config.hpp"
#include "dtdbd/data.hpp"
#include "dtdbd/errors.hpp"
#include "dtdbd/experiment.hpp"
#include "dtdbd/io.hpp"
#include "dtdbd/losses.hpp"
#include "dtdbd/metrics.hpp"
#include "dtdbd/models.hpp"
#include "dtdbd/report.hpp"
#include "dtdbd/schedule.hpp"
#include "dtdbd/tensor.hpp"
#include "dtdbd/training.hpp"
