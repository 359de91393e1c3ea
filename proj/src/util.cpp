#include "rei/util.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "rei/error.hpp"

namespace rei {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

namespace binio {

void put_string(std::ostream& os, std::string_view s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, std::size_t max_len) {
  const auto n = get<std::uint32_t>(is);
  if (!is || n > max_len) throw Error(Errc::format_error, "string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error(Errc::format_error, "truncated string");
  return s;
}

}  // namespace binio
}  // namespace rei
