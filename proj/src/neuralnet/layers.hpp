#pragma once

#include "formdigit/neuralnet.hpp"

namespace formdigit {

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng);

}  // namespace formdigit
