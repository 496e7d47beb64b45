#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gs2d {

/// File could not be opened or read/written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input is readable but not in a supported format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bitstream is damaged or truncated. Carries the byte offset and the
/// section being parsed when the damage was detected.
class CorruptionError : public FormatError {
 public:
  CorruptionError(const std::string& section, std::size_t byte_offset,
                  const std::string& what)
      : FormatError("corrupt stream in section '" + section + "' at byte " +
                    std::to_string(byte_offset) + ": " + what),
        section_(section),
        byte_offset_(byte_offset) {}

  const std::string& section() const { return section_; }
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::string section_;
  std::size_t byte_offset_;
};

}  // namespace gs2d
