#pragma once

#include "wsod/ablation.hpp"
#include "wsod/box.hpp"
#include "wsod/config.hpp"
#include "wsod/error.hpp"
#include "wsod/gradcheck.hpp"
#include "wsod/inference.hpp"
#include "wsod/linear.hpp"
#include "wsod/matrix.hpp"
#include "wsod/metrics.hpp"
#include "wsod/midn.hpp"
#include "wsod/model.hpp"
#include "wsod/pipeline.hpp"
#include "wsod/rcnn.hpp"
#include "wsod/sce.hpp"
#include "wsod/synthetic.hpp"
#include "wsod/trainer.hpp"
