#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cavsim/arrowhead.hpp"
#include "cavsim/counts.hpp"
#include "cavsim/modulation.hpp"
#include "cavsim/response.hpp"

namespace cavsim {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(const std::string& data);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

/// Simple CSV table: header row plus rows of numbers.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(const std::vector<double>& row);
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<double>> rows_;
};

std::string trace_csv(const SpectrumTrace& t);                // nu_MHz,value
std::string counts_csv(const CountSpectrum& c);               // nu_MHz,counts
std::string realization_csv(const DisorderRealization& r);    // atom_index,j,nu_MHz,g_MHz
std::string eigen_csv(const EigenSolution& s);                // lambda_MHz,PW
std::string spw_curve_csv(const std::vector<SpwPoint>& c);    // N,Omega_MHz,S_PW,stderr
std::string curve_csv(const std::vector<CurvePoint>& c, const std::string& value_name);
std::string time_trace_csv(const TimeTrace& t);               // t_us,re_cg,im_cg,re_ce,im_ce

/// Parses a two-column nu_MHz,value CSV written by trace_csv.
SpectrumTrace parse_trace_csv(const std::string& text);

}  // namespace cavsim
