#pragma once

#include <string>
#include <vector>

namespace tubelab {

// Shortest round-trip decimal rendering of v, so identical runs produce
// byte-identical files and readers recover the exact double.
std::string format_double(double v);

// Joins cells with commas.  Cells must be free of commas, quotes and
// newlines (all table content is numeric or short tokens); offenders throw.
std::string csv_line(const std::vector<std::string>& cells);

// Writes header + rows to path, creating parent directories.  Rows are
// written in the order given; callers sort first.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Power-law fit y ~ constant * x^exponent by least squares on log-log
// coordinates, plus the smallest constant that respects y <= C x^exponent on
// every row.
struct FitResult {
    bool fitted = false;     // false when the x values span less than a factor 4
    double exponent = 0.0;   // log-log slope
    double constant = 0.0;   // exp of the log-log intercept
    double max_ratio = 0.0;  // max over rows of y / x^exponent
};

// Requires matching sizes, at least 8 rows, strictly positive entries.  A
// degenerate abscissa spread (max/min < 4) is not an error: the fit is
// skipped and fitted stays false.
FitResult fit_constant(const std::vector<double>& x, const std::vector<double>& y);

// Smallest C with y <= C x^p over the rows: max of y / x^p.  Requires
// nonempty, matching, strictly positive data.
double bound_constant(const std::vector<double>& x, const std::vector<double>& y,
                      double p);

}  // namespace tubelab
