#pragma once

#include "adaptimpute/adaptive_impute.hpp"
#include "adaptimpute/error.hpp"
#include "adaptimpute/harness.hpp"
#include "adaptimpute/initializer.hpp"
#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/matrix_io.hpp"
#include "adaptimpute/observed_matrix.hpp"
#include "adaptimpute/operators.hpp"
#include "adaptimpute/rank_select.hpp"
#include "adaptimpute/report.hpp"
#include "adaptimpute/rng.hpp"
#include "adaptimpute/softimpute.hpp"
#include "adaptimpute/truncated_svd.hpp"

namespace adaptimpute {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace adaptimpute
