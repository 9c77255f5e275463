#pragma once

#include "vtwin/a3m.hpp"
#include "vtwin/error.hpp"
#include "vtwin/geometry.hpp"
#include "vtwin/hemo1d.hpp"
#include "vtwin/metrics.hpp"
#include "vtwin/nnet/layers.hpp"
#include "vtwin/nnet/model.hpp"
#include "vtwin/nnet/train.hpp"
#include "vtwin/physloss.hpp"
#include "vtwin/twin_io.hpp"
#include "vtwin/vgraph.hpp"
