#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace regtext {

// Domain error carrying a human-readable diagnostic. Thrown by every
// operation whose contract names a structured error.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void msg_append(std::ostringstream&) {}

template <typename Head, typename... Tail>
void msg_append(std::ostringstream& os, Head&& head, Tail&&... tail) {
    os << std::forward<Head>(head);
    msg_append(os, std::forward<Tail>(tail)...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(Parts&&... parts) {
    std::ostringstream os;
    detail::msg_append(os, std::forward<Parts>(parts)...);
    throw Error(os.str());
}

template <typename... Parts>
void check(bool cond, Parts&&... parts) {
    if (!cond) fail(std::forward<Parts>(parts)...);
}

}  // namespace regtext
