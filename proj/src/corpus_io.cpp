#include "ngmf/corpus_io.h"

#include <fstream>
#include <istream>
#include <ostream>

#include "ngmf/error.h"

namespace ngmf {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<RemiSequence> parse_text_corpus(std::istream& in, const std::string& source_name) {
  std::vector<RemiSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    RemiSequence seq;
    seq.source_id = source_name + ":" + std::to_string(line_no);
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
      if (i == start) continue;
      try {
        seq.events.push_back(parse_event(std::string_view(line).substr(start, i - start)));
      } catch (const ParseError& e) {
        throw ParseError(source_name + ":" + std::to_string(line_no) + ":" +
                         std::to_string(start + 1) + ": " + e.what());
      }
    }
    if (!seq.events.empty()) out.push_back(std::move(seq));
  }
  return out;
}

std::vector<RemiSequence> read_text_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus " + path);
  return parse_text_corpus(in, path);
}

void format_text_corpus(std::ostream& out, const std::vector<RemiSequence>& seqs) {
  for (const auto& seq : seqs) out << join(seq.names(), " ") << '\n';
}

void write_text_corpus(const std::vector<RemiSequence>& seqs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  format_text_corpus(out, seqs);
}

}  // namespace ngmf
