#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "gs2d/errors.hpp"

namespace gs2d {

/// CSV emitter: one header row, numeric cells as %.6f, LF line endings.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) {
    fp_ = std::fopen(path.c_str(), "wb");
    if (!fp_) throw IoError("cannot open '" + path + "' for writing");
    write_cells(header);
  }

  ~CsvWriter() {
    if (fp_) std::fclose(fp_);
  }

  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) std::fputc(',', fp_);
      std::fprintf(fp_, "%.6f", values[i]);
    }
    std::fputc('\n', fp_);
  }

  /// Mixed row: string cells pass through, numeric cells use %.6f.
  void row(const std::vector<std::string>& text,
           const std::vector<double>& values) {
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (i) std::fputc(',', fp_);
      std::fputs(text[i].c_str(), fp_);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i || !text.empty()) std::fputc(',', fp_);
      std::fprintf(fp_, "%.6f", values[i]);
    }
    std::fputc('\n', fp_);
  }

 private:
  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) std::fputc(',', fp_);
      std::fputs(cells[i].c_str(), fp_);
    }
    std::fputc('\n', fp_);
  }

  std::FILE* fp_ = nullptr;
};

}  // namespace gs2d
