#include "ngmf/midi.h"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>
#include <utility>

#include "ngmf/error.h"

namespace ngmf {
namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at(std::size_t end) const { return pos_ >= end; }

  [[noreturn]] void fail(const std::string& why) const { fail_at(pos_, why); }
  [[noreturn]] static void fail_at(std::size_t offset, const std::string& why) {
    throw ParseError("MIDI parse error at byte offset " + std::to_string(offset) + ": " + why);
  }

  void need(std::size_t n, std::size_t limit) const {
    if (pos_ + n > limit) fail("truncated data");
  }

  std::uint8_t u8(std::size_t limit) {
    need(1, limit);
    return bytes_[pos_++];
  }
  std::uint8_t peek(std::size_t limit) const {
    need(1, limit);
    return bytes_[pos_];
  }
  std::uint32_t be(int n, std::size_t limit) {
    need(static_cast<std::size_t>(n), limit);
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }
  std::uint32_t vlq(std::size_t limit) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8(limit);
      v = (v << 7) | (b & 0x7Fu);
      if ((b & 0x80u) == 0) return v;
    }
    fail("variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n, std::size_t limit) {
    need(n, limit);
    pos_ += n;
  }
  bool tag(std::string_view t, std::size_t limit) {
    need(t.size(), limit);
    const bool ok = std::equal(t.begin(), t.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ += t.size();
    return ok;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct OpenNote {
  std::int64_t onset;
  int velocity;
};

void parse_track(ByteReader& r, std::size_t end, MidiPiece& piece) {
  std::map<std::pair<int, int>, std::deque<OpenNote>> open;
  std::int64_t tick = 0;
  std::uint8_t status = 0;

  const auto close = [&](int channel, int pitch) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;
    const OpenNote n = it->second.front();
    it->second.pop_front();
    if (tick > n.onset) piece.notes.push_back({n.onset, pitch, tick - n.onset, n.velocity});
  };

  bool ended = false;
  while (!r.at(end) && !ended) {
    tick += r.vlq(end);
    std::uint8_t b = r.peek(end);
    if (b & 0x80u) {
      r.u8(end);
    } else {
      if (status == 0) r.fail("data byte without running status");
      b = status;
    }

    if (b == 0xFF) {
      const std::uint8_t type = r.u8(end);
      const std::uint32_t len = r.vlq(end);
      if (type == 0x51) {
        if (len != 3) r.fail("tempo meta event must have length 3");
        const std::uint32_t us_per_quarter = r.be(3, end);
        if (us_per_quarter == 0) r.fail("zero tempo");
        piece.tempos.push_back({tick, 60'000'000.0 / us_per_quarter});
      } else {
        r.skip(len, end);
        if (type == 0x2F) ended = true;
      }
      continue;
    }
    if (b == 0xF0 || b == 0xF7) {
      r.skip(r.vlq(end), end);
      continue;
    }
    if (b >= 0xF0) r.fail("unsupported system message in track");

    status = b;
    const int channel = b & 0x0F;
    switch (b & 0xF0u) {
      case 0x80: {
        const int pitch = r.u8(end) & 0x7F;
        r.u8(end);
        close(channel, pitch);
        break;
      }
      case 0x90: {
        const int pitch = r.u8(end) & 0x7F;
        const int vel = r.u8(end) & 0x7F;
        if (vel == 0) {
          close(channel, pitch);
        } else {
          open[{channel, pitch}].push_back({tick, vel});
        }
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0: r.skip(2, end); break;
      case 0xC0:
      case 0xD0: r.skip(1, end); break;
      default: r.fail("unknown status byte");
    }
  }
  for (auto& [key, pending] : open) {
    for (const auto& n : pending) {
      if (tick > n.onset) piece.notes.push_back({n.onset, key.second, tick - n.onset, n.velocity});
    }
  }
}

// Cuts any note that is still sounding when the same pitch starts again.
void truncate_overlaps(std::vector<NoteRecord>& notes) {
  std::stable_sort(notes.begin(), notes.end(), [](const NoteRecord& a, const NoteRecord& b) {
    return std::tie(a.pitch, a.onset_tick) < std::tie(b.pitch, b.onset_tick);
  });
  std::vector<NoteRecord> kept;
  kept.reserve(notes.size());
  for (std::size_t i = 0; i < notes.size(); ++i) {
    NoteRecord n = notes[i];
    if (i + 1 < notes.size() && notes[i + 1].pitch == n.pitch) {
      const std::int64_t next = notes[i + 1].onset_tick;
      if (n.onset_tick + n.duration_tick > next) n.duration_tick = next - n.onset_tick;
    }
    if (n.duration_tick >= 1) kept.push_back(n);
  }
  std::sort(kept.begin(), kept.end(), [](const NoteRecord& a, const NoteRecord& b) {
    return std::tie(a.onset_tick, a.pitch, a.duration_tick, a.velocity) <
           std::tie(b.onset_tick, b.pitch, b.duration_tick, b.velocity);
  });
  notes = std::move(kept);
}

}  // namespace

MidiPiece parse_midi(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::size_t size = bytes.size();
  if (!r.tag("MThd", size)) ByteReader::fail_at(0, "missing MThd header");
  const std::uint32_t header_len = r.be(4, size);
  if (header_len < 6) r.fail("header chunk shorter than 6 bytes");
  const std::size_t header_end = r.offset() + header_len;
  const std::uint32_t format = r.be(2, size);
  const std::uint32_t ntracks = r.be(2, size);
  const std::size_t division_offset = r.offset();
  const std::uint32_t division = r.be(2, size);
  if (format > 1) ByteReader::fail_at(8, "only format 0 and 1 files are supported");
  if (division & 0x8000u) ByteReader::fail_at(division_offset, "SMPTE time division is not supported");
  if (division == 0) ByteReader::fail_at(division_offset, "zero ticks per beat");
  r.skip(header_end - r.offset(), size);

  MidiPiece piece;
  piece.ticks_per_beat = static_cast<int>(division);
  for (std::uint32_t t = 0; t < ntracks; ++t) {
    const std::size_t chunk_at = r.offset();
    if (!r.tag("MTrk", size)) ByteReader::fail_at(chunk_at, "expected MTrk chunk");
    const std::uint32_t len = r.be(4, size);
    const std::size_t end = r.offset() + len;
    if (end > size) ByteReader::fail_at(chunk_at, "track chunk runs past end of file");
    parse_track(r, end, piece);
    r.skip(end - r.offset(), size);
  }

  if (piece.notes.empty()) throw DataError("MIDI file contains no note events");
  truncate_overlaps(piece.notes);
  if (piece.notes.empty()) throw DataError("MIDI file contains no note events");
  std::stable_sort(piece.tempos.begin(), piece.tempos.end(),
                   [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
  return piece;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RemiSequence midi_to_remi(std::span<const std::uint8_t> bytes, EventSet set,
                          const std::string& source_id) {
  const MidiPiece piece = parse_midi(bytes);
  const QuantGrid grid = QuantGrid::standard(piece.ticks_per_beat);
  std::vector<ChordEvent> chords;
  if (set == EventSet::kCp7) chords = detect_chords(piece.notes, grid);
  RemiSequence seq = encode_remi(piece.notes, piece.tempos, chords, grid, set);
  seq.source_id = source_id;
  return seq;
}

}  // namespace ngmf
