#include "muscl/csv.hpp"

#include <cstdio>
#include <stdexcept>

namespace muscl::csv {

Writer::Writer(const std::string& path) : os_(path, std::ios::binary) {
    if (!os_) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
}

void Writer::write_row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const std::string& f = fields[i];
        bool quote = f.find_first_of(",\"\r\n") != std::string::npos;
        if (i) os_ << ',';
        if (quote) {
            os_ << '"';
            for (char c : f) {
                if (c == '"') os_ << '"';
                os_ << c;
            }
            os_ << '"';
        } else {
            os_ << f;
        }
    }
    os_ << "\r\n";
}

std::string field(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string field(std::size_t v) { return std::to_string(v); }
std::string field(long v) { return std::to_string(v); }

}  // namespace muscl::csv
