#pragma once

#include <string>

#include "retflow/tensor.hpp"

namespace retflow {

// Textual checkpoint: per tensor a header line `name rows cols` followed by
// rows lines of cols decimal reals, tensors in name order. Values use the
// shortest round-trip decimal form, so save/load is exact and re-saving is
// byte-identical.
std::string checkpoint_text(const ParamSet& params);
void save_checkpoint(const std::string& path, const ParamSet& params);

// Fills a pre-registered ParamSet. Every tensor in the file must exist with
// matching dims, and every registered tensor must appear in the file.
void load_checkpoint_text(const std::string& text, ParamSet& params,
                          const std::string& origin);
void load_checkpoint(const std::string& path, ParamSet& params);

}  // namespace retflow
