#include "drio/tensor.hpp"

#include <string>

#include "drio/error.hpp"

namespace drio {

std::size_t count_ones(const MaskTensor& mask) {
  std::size_t count = 0;
  for (auto m : mask.flat()) count += (m != 0);
  return count;
}

void require_binary(const MaskTensor& mask, const char* what) {
  for (auto m : mask.flat()) {
    if (m > 1) throw ValidationError(std::string(what) + ": non-binary mask value " + std::to_string(m));
  }
}

RealTensor apply_mask(const RealTensor& values, const MaskTensor& mask) {
  if (!(values.shape() == mask.shape())) throw ValidationError("apply_mask: shape mismatch");
  RealTensor out(values.shape());
  for (std::size_t k = 0; k < values.size(); ++k) out[k] = mask[k] ? values[k] : 0.0;
  return out;
}

}  // namespace drio
