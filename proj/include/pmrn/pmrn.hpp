#pragma once

#include "pmrn/analyzer.hpp"
#include "pmrn/autograd.hpp"
#include "pmrn/data.hpp"
#include "pmrn/gradcheck.hpp"
#include "pmrn/image.hpp"
#include "pmrn/metrics.hpp"
#include "pmrn/model.hpp"
#include "pmrn/nn.hpp"
#include "pmrn/tensor.hpp"
#include "pmrn/trainer.hpp"
#include "pmrn/weights_io.hpp"
