#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lfa {

// Ordinals are persisted (model outputs, manifests) and must not change.
enum class ClassLabel : std::uint8_t { Positive = 0, Negative = 1, Invalid = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, 3> kAllLabels = {
    ClassLabel::Positive, ClassLabel::Negative, ClassLabel::Invalid};

inline const char* to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::Positive: return "POSITIVE";
    case ClassLabel::Negative: return "NEGATIVE";
    case ClassLabel::Invalid: return "INVALID";
  }
  return "?";
}

inline ClassLabel parse_label(std::string_view s) {
  std::string up(s);
  for (auto& ch : up) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (up == "POSITIVE") return ClassLabel::Positive;
  if (up == "NEGATIVE") return ClassLabel::Negative;
  if (up == "INVALID") return ClassLabel::Invalid;
  throw std::invalid_argument("unknown class label '" + std::string(s) + "'");
}

inline int ordinal(ClassLabel c) { return static_cast<int>(c); }

inline ClassLabel label_from_ordinal(int i) {
  if (i < 0 || i > 2) throw std::invalid_argument("class ordinal out of range");
  return static_cast<ClassLabel>(i);
}

}  // namespace lfa
