#pragma once

// Plain-text snapshot files and CSV dumps of estimator state.
//
// Snapshot file layout:
//   # free-form comment lines
//   M,T
//   re(0,0),im(0,0),re(0,1),im(0,1),...      one line per element, 2T values
//   ...

#include <charconv>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "array_core.hpp"
#include "message_passing.hpp"
#include "metrics.hpp"

namespace mpdoa {

class ParseError : public std::runtime_error {
public:
    ParseError(int line, int column, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ", field " + std::to_string(column) + ": " + what),
          line_(line),
          column_(column) {}
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

template <class Num>
Num parse_field(std::string_view f, int line, int column) {
    Num v{};
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || res.ec != std::errc{} || res.ptr != f.data() + f.size())
        throw ParseError(line, column, "cannot parse '" + std::string(f) + "' as a number");
    return v;
}

}  // namespace detail

inline CMatrix read_snapshots(std::istream& in) {
    std::string text;
    int line_no = 0;
    int m = -1, t = -1, row = 0;
    CMatrix out;
    while (std::getline(in, text)) {
        ++line_no;
        const auto line = detail::trim(text);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = detail::split_fields(line);
        if (m < 0) {
            if (fields.size() != 2) throw ParseError(line_no, 1, "expected header 'M,T'");
            m = detail::parse_field<int>(fields[0], line_no, 1);
            t = detail::parse_field<int>(fields[1], line_no, 2);
            if (m < 2 || m % 2 != 0) throw ParseError(line_no, 1, "M must be even and >= 2");
            if (t < 1) throw ParseError(line_no, 2, "T must be >= 1");
            out = CMatrix::Zero(m, t);
            continue;
        }
        if (row >= m) throw ParseError(line_no, 1, "more than M = " + std::to_string(m) + " data rows");
        if (static_cast<int>(fields.size()) != 2 * t)
            throw ParseError(line_no, static_cast<int>(fields.size()),
                             "expected " + std::to_string(2 * t) + " values, got " + std::to_string(fields.size()));
        for (int j = 0; j < t; ++j) {
            const double re = detail::parse_field<double>(fields[2 * j], line_no, 2 * j + 1);
            const double im = detail::parse_field<double>(fields[2 * j + 1], line_no, 2 * j + 2);
            out(row, j) = {re, im};
        }
        ++row;
    }
    if (m < 0) throw ParseError(line_no, 0, "missing 'M,T' header");
    if (row != m)
        throw ParseError(line_no, 0, "expected " + std::to_string(m) + " data rows, got " + std::to_string(row));
    return out;
}

inline void write_snapshots(std::ostream& os, const CMatrix& raw, const std::string& comment = {}) {
    if (!comment.empty()) {
        std::size_t start = 0;
        while (start <= comment.size()) {
            const auto nl = comment.find('\n', start);
            os << "# " << comment.substr(start, nl == std::string::npos ? std::string::npos : nl - start) << '\n';
            if (nl == std::string::npos) break;
            start = nl + 1;
        }
    }
    os << raw.rows() << ',' << raw.cols() << '\n';
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        for (Eigen::Index j = 0; j < raw.cols(); ++j) {
            if (j) os << ',';
            os << format_number(raw(i, j).real()) << ',' << format_number(raw(i, j).imag());
        }
        os << '\n';
    }
}

inline void write_trace(std::ostream& os, const std::vector<TraceRow>& trace) {
    os << "iteration,relative_change,lambda,epsilon\n";
    for (const auto& r : trace)
        os << r.iteration << ',' << format_number(r.relative_change) << ',' << format_number(r.lambda) << ','
           << format_number(r.epsilon) << '\n';
}

/// One row per grid point: bin, gamma, alpha, v_alpha and mean posterior power.
inline void write_beliefs(std::ostream& os, const BeliefState& b, const GridDecomposition& grid) {
    const Eigen::VectorXd power = b.mean_power();
    os << "grid,w,gamma,alpha,v_alpha,power\n";
    for (int g = 0; g < grid.elements(); ++g)
        os << g << ',' << grid.bin(g) << ',' << format_number(b.gamma[g]) << ',' << format_number(b.alpha[g]) << ','
           << format_number(b.v_alpha[g]) << ',' << format_number(power[g]) << '\n';
}

}  // namespace mpdoa
