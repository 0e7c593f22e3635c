#include "relbot/canonical_json.hpp"

#include <cmath>
#include <cstdio>

#include "relbot/errors.hpp"

namespace relbot {
namespace {

void dump(const Json& v, std::string& out) {
  switch (v.type()) {
    case Json::value_t::object: {
      // nlohmann::json stores objects in a std::map, so iteration is key-sorted
      out += '{';
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += Json(it.key()).dump();
        out += ':';
        dump(it.value(), out);
      }
      out += '}';
      return;
    }
    case Json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        dump(v[i], out);
      }
      out += ']';
      return;
    }
    case Json::value_t::number_float:
      out += format_double(v.get<double>());
      return;
    default:
      out += v.dump();
      return;
  }
}

}  // namespace

std::string format_double(double value) {
  if (!std::isfinite(value)) throw ValidationError("cannot serialize a non-finite number");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string canonical_dump(const Json& value) {
  std::string out;
  dump(value, out);
  return out;
}

std::string canonical_document(const Json& value) { return canonical_dump(value) + "\n"; }

}  // namespace relbot
