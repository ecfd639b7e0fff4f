#include "covsteer/policy.hpp"

#include "covsteer/error.hpp"

namespace covsteer {

const char* to_string(PolicyMode m) {
  switch (m) {
    case PolicyMode::dd: return "dd";
    case PolicyMode::rdd: return "rdd";
    case PolicyMode::mb: return "mb";
  }
  return "?";
}

PolicyMode parse_policy_mode(const std::string& s) {
  if (s == "dd") return PolicyMode::dd;
  if (s == "rdd") return PolicyMode::rdd;
  if (s == "mb") return PolicyMode::mb;
  throw Error("unknown policy mode '" + s + "' (expected dd, rdd or mb)");
}

}  // namespace covsteer
