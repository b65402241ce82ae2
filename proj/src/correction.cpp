#include "fedseg/correction.hpp"

namespace fedseg {

std::string_view to_string(CorrectionMode mode) {
  switch (mode) {
    case CorrectionMode::none: return "none";
    case CorrectionMode::smoothing: return "smoothing";
    case CorrectionMode::soft: return "soft";
    case CorrectionMode::dhlc_local: return "dhlc_local";
    case CorrectionMode::celc_central: return "celc_central";
  }
  return "none";
}

CorrectionMode parse_correction_mode(std::string_view name) {
  for (auto m : {CorrectionMode::none, CorrectionMode::smoothing, CorrectionMode::soft,
                 CorrectionMode::dhlc_local, CorrectionMode::celc_central})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown correction mode '" + std::string(name) + "'");
}

void CorrectionPolicy::validate() const {
  // Every field is range-checked, including those the mode does not use.
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
  if (!(h0 > 0.0 && h0 <= 1.0)) throw ConfigError("h0 must lie in (0, 1]");
  if (!(h1 > 0.0 && h1 <= 1.0)) throw ConfigError("h1 must lie in (0, 1]");
}

}  // namespace fedseg
