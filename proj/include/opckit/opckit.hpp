#pragma once

#include "opckit/embedding.hpp"
#include "opckit/errors.hpp"
#include "opckit/fft.hpp"
#include "opckit/grid.hpp"
#include "opckit/ilt.hpp"
#include "opckit/layout.hpp"
#include "opckit/litho.hpp"
#include "opckit/metrics.hpp"
#include "opckit/pattern_library.hpp"
#include "opckit/pgm.hpp"
#include "opckit/pipeline.hpp"
#include "opckit/shift_calibration.hpp"
#include "opckit/solver_select.hpp"
