#pragma once

#include "rwm/common.hpp"
#include "rwm/data.hpp"
#include "rwm/eval.hpp"
#include "rwm/gmm.hpp"
#include "rwm/kernel.hpp"
#include "rwm/levelcurves.hpp"
#include "rwm/similarity.hpp"
#include "rwm/svm.hpp"
#include "rwm/synthetic.hpp"
#include "rwm/tuning.hpp"
