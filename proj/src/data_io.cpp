#include "odebayes/data_io.hpp"

#include "odebayes/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace odebayes {

namespace {

[[noreturn]] void fail(const std::string& source, long line, const std::string& msg) {
    std::ostringstream os;
    os << source << ":" << line << ": " << msg;
    throw Error(ErrorCategory::Parse, os.str());
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

bool parse_number(const std::string& s, double& v) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    return !s.empty() && ec == std::errc() && ptr == last;
}

bool is_number(const std::string& s) {
    double v = 0;
    return parse_number(s, v);
}

double to_double(const std::string& s, const std::string& source, long line, std::size_t col) {
    double v = 0;
    if (!parse_number(s, v)) {
        std::ostringstream os;
        os << "column " << col + 1 << ": '" << s << "' is not a number";
        fail(source, line, os.str());
    }
    return v;
}

} // namespace

Dataset read_dataset(std::istream& in, const std::string& source) {
    std::string raw;
    long line = 0;
    std::vector<std::string> header;
    std::vector<double> x;
    std::vector<std::vector<double>> ys;
    while (std::getline(in, raw)) {
        ++line;
        const auto text = trim(raw);
        if (text.empty() || text[0] == '#') continue;
        const auto fields = split(text);
        if (header.empty()) {
            header = fields;
            if (header.size() < 2) fail(source, line, "header needs a t column and at least one response column");
            for (const auto& h : header)
                if (is_number(h)) fail(source, line, "missing header line (found numeric field '" + h + "')");
            continue;
        }
        if (fields.size() != header.size()) {
            std::ostringstream os;
            os << "expected " << header.size() << " fields, found " << fields.size();
            fail(source, line, os.str());
        }
        x.push_back(to_double(fields[0], source, line, 0));
        std::vector<double> row;
        for (std::size_t j = 1; j < fields.size(); ++j) row.push_back(to_double(fields[j], source, line, j));
        ys.push_back(std::move(row));
    }
    if (header.empty()) fail(source, line, "empty data file");
    if (x.empty()) fail(source, line, "no data rows");
    Dataset d;
    d.x = std::move(x);
    d.Y.resize(static_cast<Eigen::Index>(ys.size()), static_cast<Eigen::Index>(header.size() - 1));
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t j = 0; j < ys[i].size(); ++j)
            d.Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ys[i][j];
    return d;
}

Dataset read_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::Io, "cannot open data file " + path);
    return read_dataset(in, path);
}

void write_dataset(std::ostream& out, const Dataset& data) {
    if (static_cast<Eigen::Index>(data.x.size()) != data.Y.rows()) throw_invalid("write_dataset: x and Y disagree");
    out << "t";
    for (Eigen::Index j = 0; j < data.Y.cols(); ++j) out << ",y" << j + 1;
    out << "\n";
    char buf[32];
    for (std::size_t i = 0; i < data.x.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", data.x[i]);
        out << buf;
        for (Eigen::Index j = 0; j < data.Y.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", data.Y(static_cast<Eigen::Index>(i), j));
            out << "," << buf;
        }
        out << "\n";
    }
}

void write_dataset_file(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::Io, "cannot write data file " + path);
    write_dataset(out, data);
    if (!out) throw Error(ErrorCategory::Io, "error writing data file " + path);
}

} // namespace odebayes
