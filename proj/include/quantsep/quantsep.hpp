// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "quantsep/alloc.hpp"
#include "quantsep/common.hpp"
#include "quantsep/config.hpp"
#include "quantsep/dsp.hpp"
#include "quantsep/fft.hpp"
#include "quantsep/mixgen.hpp"
#include "quantsep/nas.hpp"
#include "quantsep/parallel.hpp"
#include "quantsep/pipeline.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sensitivity.hpp"
#include "quantsep/sepnet.hpp"
#include "quantsep/tensor.hpp"
#include "quantsep/wav.hpp"
