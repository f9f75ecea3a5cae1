#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace muscl::csv {

/// RFC-4180 writer: CRLF line endings, quoting only where required.
class Writer {
public:
    explicit Writer(const std::string& path);
    void write_row(const std::vector<std::string>& fields);

private:
    std::ofstream os_;
};

std::string field(double v);        // shortest round-trip double formatting
std::string field(std::size_t v);
std::string field(long v);

}  // namespace muscl::csv
