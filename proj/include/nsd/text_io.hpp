#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "nsd/error.hpp"

namespace nsd::text {

// Shortest representation that round-trips exactly.
template <typename T> std::string format_number(T value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

template <typename T> void append_number(std::string &out, T value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, res.ptr);
}

template <typename T> bool parse_number(std::string_view s, T &out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (s.empty())
    return false;
  if (s.front() == '+')
    s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
                        s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

// Parses "# key=value key=value ..." metadata lines.
inline bool header_value(std::string_view line, std::string_view key,
                         std::string &value) {
  line = trim(line);
  if (line.empty() || line.front() != '#')
    return false;
  line.remove_prefix(1);
  for (auto token : split(line, ' ')) {
    token = trim(token);
    const auto eq = token.find('=');
    if (eq == std::string_view::npos)
      continue;
    if (token.substr(0, eq) == key) {
      value = std::string(token.substr(eq + 1));
      return true;
    }
  }
  return false;
}

inline std::ofstream open_output(const std::string &path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_input(const std::string &path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in)
    throw IoError("cannot open '" + path + "' for reading");
  return in;
}

// Little-endian binary helpers.
template <typename T> void write_le(std::ostream &out, T value) {
  static_assert(std::is_arithmetic_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes, bytes + sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T> T read_le(std::istream &in, const char *what) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T)))
    throw FormatError(std::string("truncated file while reading ") + what);
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

} // namespace nsd::text
