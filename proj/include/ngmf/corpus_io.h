#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ngmf/remi.h"

namespace ngmf {

// Text corpus: one sequence per LF-terminated line, event names separated by
// spaces. Blank lines are skipped. Errors name the 1-based line and column.
std::vector<RemiSequence> parse_text_corpus(std::istream& in, const std::string& source_name);
std::vector<RemiSequence> read_text_corpus(const std::string& path);

void format_text_corpus(std::ostream& out, const std::vector<RemiSequence>& seqs);
void write_text_corpus(const std::vector<RemiSequence>& seqs, const std::string& path);

// Splits on runs of spaces/tabs; used by every line-oriented reader.
std::vector<std::string> split_ws(const std::string& line);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace ngmf
