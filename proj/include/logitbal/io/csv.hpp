#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "logitbal/io/files.hpp"
#include "logitbal/logit_data.hpp"

namespace logitbal::io {

/// Raised for malformed dump files; the message carries the line number.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no, const char* what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE)
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  return v;
}

inline long parse_int(const std::string& s, std::size_t line_no, const char* what) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  return v;
}
}  // namespace detail

/// Logit dump format: header `domain,label,quality,logit_0,...,logit_{C-1}`,
/// one record per row. label is -1 for unlabeled target rows. C is inferred
/// from the header and enforced on every row.
inline LogitBatch read_logit_dump_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: empty dump");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv(line);
  if (header.size() < 4 || header[0] != "domain" || header[1] != "label" || header[2] != "quality")
    throw ParseError("line 1: header must start with domain,label,quality,logit_0,...");
  const int c = static_cast<int>(header.size()) - 3;
  for (int l = 0; l < c; ++l)
    if (header[static_cast<std::size_t>(3 + l)] != "logit_" + std::to_string(l))
      throw ParseError("line 1: expected column logit_" + std::to_string(l));

  LogitBatch batch;
  batch.num_classes = c;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv(line);
    if (static_cast<int>(fields.size()) != c + 3)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(c + 3) +
                       " fields, got " + std::to_string(fields.size()));
    LogitRecord r;
    try {
      r.domain = parse_domain(fields[0]);
    } catch (const std::invalid_argument& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    const long label = detail::parse_int(fields[1], line_no, "label");
    if (label < -1 || label >= c)
      throw ParseError("line " + std::to_string(line_no) + ": label " + std::to_string(label) +
                       " out of range for " + std::to_string(c) + " classes");
    if (label == -1 && r.domain != Domain::kTarget)
      throw ParseError("line " + std::to_string(line_no) + ": unlabeled row must be in the target domain");
    r.label = static_cast<int>(label);
    r.quality = detail::parse_double(fields[2], line_no, "quality");
    if (!(r.quality >= 0.0 && r.quality <= 1.0))
      throw ParseError("line " + std::to_string(line_no) + ": quality outside [0,1]");
    r.logits.resize(static_cast<std::size_t>(c));
    for (int l = 0; l < c; ++l)
      r.logits[static_cast<std::size_t>(l)] =
          detail::parse_double(fields[static_cast<std::size_t>(3 + l)], line_no, "logit");
    batch.records.push_back(std::move(r));
  }
  return batch;
}

inline LogitBatch read_logit_dump(const std::filesystem::path& path) {
  return read_logit_dump_text(read_file(path));
}

inline std::string write_logit_dump_text(const LogitBatch& batch) {
  batch.validate();
  std::ostringstream out;
  out << "domain,label,quality";
  for (int l = 0; l < batch.num_classes; ++l) out << ",logit_" << l;
  out << "\n";
  for (const auto& r : batch.records) {
    out << domain_name(r.domain) << ',' << r.label << ',' << format_double(r.quality);
    for (double v : r.logits) out << ',' << format_double(v);
    out << "\n";
  }
  return out.str();
}

inline void write_logit_dump(const std::filesystem::path& path, const LogitBatch& batch) {
  atomic_write_file(path, write_logit_dump_text(batch));
}

/// Output rows of the `adjust` command.
struct PredictionRow {
  Domain domain = Domain::kSource;
  int label = -1;
  int original = 0;
  int revised = 0;
};

inline std::string write_predictions_text(const std::vector<PredictionRow>& rows) {
  std::ostringstream out;
  out << "domain,label,original,revised\n";
  for (const auto& r : rows)
    out << domain_name(r.domain) << ',' << r.label << ',' << r.original << ',' << r.revised << "\n";
  return out.str();
}

}  // namespace logitbal::io
