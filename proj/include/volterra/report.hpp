#pragma once

// Flat "key=value" text blocks shared by all reports.

#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>

namespace volterra::report {

inline std::string number(double x, int significant = 10) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", significant, x);
    return buf;
}

class KeyValueBlock {
public:
    KeyValueBlock& add(std::string_view key, double value, int significant = 10) {
        return line(key, number(value, significant));
    }
    KeyValueBlock& add(std::string_view key, bool value) { return line(key, value ? "true" : "false"); }
    KeyValueBlock& add(std::string_view key, std::size_t value) { return line(key, std::to_string(value)); }
    KeyValueBlock& add(std::string_view key, int value) { return line(key, std::to_string(value)); }
    KeyValueBlock& add(std::string_view key, std::string_view value) { return line(key, value); }
    KeyValueBlock& add(std::string_view key, const char* value) { return line(key, value); }

    std::string str() const { return out_.str(); }

private:
    KeyValueBlock& line(std::string_view key, std::string_view value) {
        out_ << key << '=' << value << '\n';
        return *this;
    }
    std::ostringstream out_;
};

} // namespace volterra::report
