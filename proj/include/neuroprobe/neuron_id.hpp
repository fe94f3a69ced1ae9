#pragma once

#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>

#include "neuroprobe/error.hpp"

namespace neuroprobe {

/// Addresses one neuron as (layer, index within layer). The string form is
/// `L<layer>:<index>`; flat indices are layer-major.
struct NeuronId {
  std::size_t layer = 0;
  std::size_t index = 0;

  friend bool operator==(const NeuronId&, const NeuronId&) = default;
  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;

  std::size_t flat(std::size_t neurons_per_layer) const { return layer * neurons_per_layer + index; }

  static NeuronId from_flat(std::size_t flat, std::size_t neurons_per_layer) {
    return {flat / neurons_per_layer, flat % neurons_per_layer};
  }

  std::string str() const { return "L" + std::to_string(layer) + ":" + std::to_string(index); }

  static NeuronId parse(std::string_view text) {
    auto fail = [&]() -> NeuronId { throw InvalidInput("malformed neuron id '" + std::string(text) + "'"); };
    if (text.size() < 4 || text.front() != 'L') return fail();
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) return fail();
    auto parse_part = [&](std::string_view part, std::size_t& out) {
      if (part.empty() || part.front() < '0' || part.front() > '9') return false;
      const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
      return ec == std::errc() && ptr == part.data() + part.size();
    };
    NeuronId id;
    if (!parse_part(text.substr(1, colon - 1), id.layer) || !parse_part(text.substr(colon + 1), id.index))
      return fail();
    return id;
  }
};

}  // namespace neuroprobe
