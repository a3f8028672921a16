#pragma once

#include <iosfwd>

#include "qkf/qff.hpp"

namespace qkf::qff {

/// Self-describing binary container: header with hyperparameters, then one
/// named row-major float64 tensor per learnable parameter.
void save_checkpoint(const QffParams& params, std::ostream& out);

/// Validates magic, version and tensor shapes against the header.
QffParams load_checkpoint(std::istream& in);

}  // namespace qkf::qff
