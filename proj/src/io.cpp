#include "cavsim/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "cavsim/error.hpp"

namespace cavsim {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::NotFound, "cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorCode::Io, "read failed: " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  if (ec) fail(ErrorCode::Io, "cannot create directory " + p.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write file: " + path);
  out << content;
  if (!out) fail(ErrorCode::Io, "write failed: " + path);
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::Io, "SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(const std::vector<double>& row) {
  if (row.size() != header_.size()) fail(ErrorCode::InvalidArgument, "CSV row width does not match header");
  rows_.push_back(row);
}

std::string CsvTable::str() const {
  std::string s;
  for (std::size_t i = 0; i < header_.size(); ++i) s += (i ? "," : "") + header_[i];
  s += '\n';
  for (const auto& r : rows_) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) s += ',';
      s += format_double(r[i]);
    }
    s += '\n';
  }
  return s;
}

std::string trace_csv(const SpectrumTrace& t) {
  CsvTable c({"nu_MHz", "value"});
  for (std::size_t i = 0; i < t.nu.size(); ++i) c.add_row({t.nu[i], t.value[i]});
  return c.str();
}

std::string counts_csv(const CountSpectrum& cs) {
  CsvTable c({"nu_MHz", "counts"});
  for (std::size_t i = 0; i < cs.nu.size(); ++i) c.add_row({cs.nu[i], static_cast<double>(cs.counts[i])});
  return c.str();
}

std::string realization_csv(const DisorderRealization& r) {
  CsvTable c({"atom_index", "j", "nu_MHz", "g_MHz"});
  const std::size_t per = static_cast<std::size_t>(r.lines_per_atom);
  for (std::size_t i = 0; i < r.size(); ++i)
    c.add_row({static_cast<double>(i / per), static_cast<double>(i % per + 1), r.nu[i], r.g[i]});
  return c.str();
}

std::string eigen_csv(const EigenSolution& s) {
  CsvTable c({"lambda_MHz", "PW"});
  for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) c.add_row({s.eigenvalues[i], s.pw[i]});
  return c.str();
}

std::string spw_curve_csv(const std::vector<SpwPoint>& curve) {
  CsvTable c({"N", "Omega_MHz", "S_PW", "stderr"});
  for (const auto& p : curve) c.add_row({static_cast<double>(p.N), p.Omega, p.spw, p.spw_stderr});
  return c.str();
}

std::string curve_csv(const std::vector<CurvePoint>& curve, const std::string& value_name) {
  CsvTable c({"Omega_MHz", value_name, "stderr", "n_points"});
  for (const auto& p : curve) c.add_row({p.center, p.mean, p.stderr_, static_cast<double>(p.n)});
  return c.str();
}

std::string time_trace_csv(const TimeTrace& t) {
  CsvTable c({"t_us", "re_cg", "im_cg", "re_ce", "im_ce"});
  for (std::size_t i = 0; i < t.t.size(); ++i)
    c.add_row({t.t[i], t.cg[i].real(), t.cg[i].imag(), t.ce[i].real(), t.ce[i].imag()});
  return c.str();
}

SpectrumTrace parse_trace_csv(const std::string& text) {
  SpectrumTrace t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorCode::Schema, "line " + std::to_string(lineno) + ": expected two columns");
    double a = 0, b = 0;
    const auto ra = std::from_chars(line.data(), line.data() + comma, a);
    const auto rb = std::from_chars(line.data() + comma + 1, line.data() + line.size(), b);
    if (ra.ec != std::errc() || rb.ec != std::errc())
      fail(ErrorCode::Schema, "line " + std::to_string(lineno) + ": not a number");
    t.nu.push_back(a);
    t.value.push_back(b);
  }
  return t;
}

}  // namespace cavsim
