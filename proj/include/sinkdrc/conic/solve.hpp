// Backend registry.
#pragma once

#include "sinkdrc/conic/admm.hpp"
#include "sinkdrc/conic/backend.hpp"

#ifdef SINKDRC_HAVE_CLARABEL
#include "sinkdrc/conic/clarabel.hpp"
#endif

namespace sinkdrc::conic {

inline std::unique_ptr<Backend> make_backend(const std::string& name) {
#ifdef SINKDRC_HAVE_CLARABEL
  if (name == "clarabel" || name == "default") return std::make_unique<ClarabelBackend>();
#else
  if (name == "default") return std::make_unique<AdmmBackend>();
#endif
  if (name == "admm") return std::make_unique<AdmmBackend>();
  throw ValidationError("unknown conic backend '" + name + "'");
}

}  // namespace sinkdrc::conic
