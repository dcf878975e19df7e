#include "tubelab/report.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace tubelab {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string csv_line(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].find_first_of(",\"\n\r") != std::string::npos)
            throw std::invalid_argument("csv_line: cell contains a delimiter: " + cells[i]);
        if (i > 0) line += ',';
        line += cells[i];
    }
    return line;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    out << csv_line(header) << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw std::invalid_argument("write_csv: row width mismatch in " + path);
        out << csv_line(row) << '\n';
    }
    if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

namespace {

void check_fit_data(const std::vector<double>& x, const std::vector<double>& y,
                    std::size_t min_rows) {
    if (x.size() != y.size()) throw std::invalid_argument("fit: size mismatch");
    if (x.size() < min_rows) throw std::invalid_argument("fit: too few rows");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] > 0.0) || !(y[i] > 0.0))
            throw std::invalid_argument("fit: data must be strictly positive");
}

}  // namespace

FitResult fit_constant(const std::vector<double>& x, const std::vector<double>& y) {
    check_fit_data(x, y, 8);
    double xmin = x[0], xmax = x[0];
    for (double v : x) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    FitResult fit;
    if (xmax < 4.0 * xmin) return fit;  // spread too small to resolve a slope

    const double m = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = m * sxx - sx * sx;
    fit.fitted = true;
    fit.exponent = (m * sxy - sx * sy) / denom;
    fit.constant = std::exp((sy - fit.exponent * sx) / m);
    fit.max_ratio = bound_constant(x, y, fit.exponent);
    return fit;
}

double bound_constant(const std::vector<double>& x, const std::vector<double>& y,
                      double p) {
    check_fit_data(x, y, 1);
    double best = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        best = std::max(best, y[i] / std::pow(x[i], p));
    return best;
}

}  // namespace tubelab
