#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "nsd/error.hpp"
#include "nsd/text_io.hpp"

namespace nsd::eeg {

// Multi-channel EEG in microvolts, samples[channel][time].
struct Recording {
  std::string subject_id;
  double sample_rate_hz{0.0};
  std::vector<std::string> channel_names;
  std::vector<std::vector<float>> samples;

  std::size_t n_channels() const { return samples.size(); }
  std::size_t n_samples() const { return samples.empty() ? 0 : samples[0].size(); }
  double duration_s() const {
    return sample_rate_hz > 0.0 ? static_cast<double>(n_samples()) / sample_rate_hz : 0.0;
  }

  void validate() const {
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
      throw FormatError("recording: sample rate must be positive");
    if (samples.empty())
      throw FormatError("recording: no channels");
    if (channel_names.size() != samples.size())
      throw FormatError("recording: channel name count does not match data");
    for (const auto &ch : samples) {
      if (ch.size() != samples[0].size())
        throw FormatError("recording: channels have unequal length");
      for (float v : ch)
        if (!std::isfinite(v))
          throw FormatError("recording: non-finite sample");
    }
  }
};

// 1 Hz seizure labels; fused[t] is the OR over channels.
struct AnnotationSet {
  std::string subject_id;
  std::vector<std::string> channel_names;
  std::vector<std::vector<std::uint8_t>> per_channel;
  std::vector<std::uint8_t> fused;

  std::size_t n_seconds() const { return fused.size(); }

  static AnnotationSet zeros(std::string subject_id, std::vector<std::string> channels,
                             std::size_t n_seconds) {
    AnnotationSet ann;
    ann.subject_id = std::move(subject_id);
    ann.per_channel.assign(channels.size(), std::vector<std::uint8_t>(n_seconds, 0));
    ann.channel_names = std::move(channels);
    ann.fused.assign(n_seconds, 0);
    return ann;
  }

  void recompute_fused() {
    const std::size_t n = per_channel.empty() ? 0 : per_channel[0].size();
    fused.assign(n, 0);
    for (const auto &ch : per_channel)
      for (std::size_t t = 0; t < n; ++t)
        fused[t] = static_cast<std::uint8_t>(fused[t] | (ch[t] ? 1 : 0));
  }

  void validate() const {
    if (per_channel.size() != channel_names.size())
      throw FormatError("annotations: channel name count does not match data");
    for (std::size_t c = 0; c < per_channel.size(); ++c) {
      if (per_channel[c].size() != fused.size())
        throw FormatError("annotations: channel length differs from fused length");
    }
    for (std::size_t t = 0; t < fused.size(); ++t) {
      std::uint8_t any = 0;
      for (const auto &ch : per_channel)
        any |= ch[t] ? 1 : 0;
      if (any != (fused[t] ? 1 : 0))
        throw FormatError("annotations: fused label at t=" + std::to_string(t) +
                          " is not the OR of channel labels");
    }
  }
};

namespace detail {

inline std::string join_channels(const std::vector<std::string> &names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i)
      out += ';';
    out += names[i];
  }
  return out;
}

inline std::vector<std::string> parse_channels(const std::string &field) {
  std::vector<std::string> names;
  for (auto part : text::split(field, ';'))
    names.emplace_back(part);
  return names;
}

inline std::string line_error(const std::string &path, std::size_t line_no,
                              const std::string &msg) {
  return path + ":" + std::to_string(line_no) + ": " + msg;
}

} // namespace detail

inline Recording read_recording(const std::string &path) {
  auto in = text::open_input(path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(detail::line_error(path, 1, "missing header"));

  Recording rec;
  std::string fs_text, channels_text;
  if (!text::header_value(line, "fs", fs_text) ||
      !text::header_value(line, "channels", channels_text))
    throw FormatError(detail::line_error(path, 1, "malformed header, expected "
                                                  "'# subject=<id> fs=<hz> channels=<a;b;...>'"));
  text::header_value(line, "subject", rec.subject_id);
  if (!text::parse_number(fs_text, rec.sample_rate_hz) || !(rec.sample_rate_hz > 0.0) ||
      !std::isfinite(rec.sample_rate_hz))
    throw FormatError(detail::line_error(path, 1, "invalid sample rate '" + fs_text + "'"));
  rec.channel_names = detail::parse_channels(channels_text);
  const std::size_t n_ch = rec.channel_names.size();
  rec.samples.assign(n_ch, {});

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty())
      continue;
    const auto cells = text::split(row, ',');
    if (cells.size() != n_ch)
      throw FormatError(detail::line_error(path, line_no,
                                           "expected " + std::to_string(n_ch) + " columns, got " +
                                               std::to_string(cells.size())));
    for (std::size_t c = 0; c < n_ch; ++c) {
      float v;
      if (!text::parse_number(cells[c], v))
        throw FormatError(detail::line_error(path, line_no, "non-numeric cell '" +
                                                                std::string(cells[c]) + "'"));
      if (!std::isfinite(v))
        throw FormatError(detail::line_error(path, line_no, "non-finite value"));
      rec.samples[c].push_back(v);
    }
  }
  if (rec.n_samples() == 0)
    throw FormatError(path + ": no samples");
  return rec;
}

inline void write_recording(const Recording &rec, const std::string &path) {
  rec.validate();
  if (rec.n_samples() == 0 || rec.duration_s() < 1.0)
    throw DataError("refusing to write a recording shorter than one second");
  auto out = text::open_output(path);
  out << "# subject=" << rec.subject_id << " fs=" << text::format_number(rec.sample_rate_hz)
      << " channels=" << detail::join_channels(rec.channel_names) << '\n';
  std::string buf;
  buf.reserve(1 << 20);
  const std::size_t n = rec.n_samples();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
      if (c)
        buf += ',';
      text::append_number(buf, rec.samples[c][t]);
    }
    buf += '\n';
    if (buf.size() > (1u << 20) - 256) {
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

inline AnnotationSet read_annotations(const std::string &path) {
  auto in = text::open_input(path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(detail::line_error(path, 1, "missing header"));
  AnnotationSet ann;
  std::string channels_text;
  if (!text::header_value(line, "channels", channels_text))
    throw FormatError(detail::line_error(path, 1, "malformed header, expected "
                                                  "'# subject=<id> channels=<a;b;...>'"));
  text::header_value(line, "subject", ann.subject_id);
  ann.channel_names = detail::parse_channels(channels_text);
  const std::size_t n_ch = ann.channel_names.size();
  ann.per_channel.assign(n_ch, {});

  std::vector<std::uint8_t> stored_fused;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty())
      continue;
    const auto cells = text::split(row, ',');
    if (cells.size() != n_ch + 2)
      throw FormatError(detail::line_error(path, line_no,
                                           "expected " + std::to_string(n_ch + 2) +
                                               " columns, got " + std::to_string(cells.size())));
    long long t;
    if (!text::parse_number(cells[0], t) || t != static_cast<long long>(stored_fused.size()))
      throw FormatError(detail::line_error(path, line_no, "time column out of sequence"));
    for (std::size_t c = 0; c <= n_ch; ++c) {
      int v;
      if (!text::parse_number(cells[c + 1], v) || (v != 0 && v != 1))
        throw FormatError(detail::line_error(path, line_no, "label must be 0 or 1"));
      if (c < n_ch)
        ann.per_channel[c].push_back(static_cast<std::uint8_t>(v));
      else
        stored_fused.push_back(static_cast<std::uint8_t>(v));
    }
  }
  ann.recompute_fused();
  if (ann.fused != stored_fused) {
    for (std::size_t t = 0; t < stored_fused.size(); ++t)
      if (ann.fused[t] != stored_fused[t])
        throw FormatError(detail::line_error(path, t + 2,
                                             "fused column is not the OR of channel columns"));
  }
  return ann;
}

inline void write_annotations(const AnnotationSet &ann, const std::string &path) {
  ann.validate();
  auto out = text::open_output(path);
  out << "# subject=" << ann.subject_id
      << " channels=" << detail::join_channels(ann.channel_names) << '\n';
  std::string buf;
  for (std::size_t t = 0; t < ann.n_seconds(); ++t) {
    buf += std::to_string(t);
    for (const auto &ch : ann.per_channel) {
      buf += ',';
      buf += ch[t] ? '1' : '0';
    }
    buf += ',';
    buf += ann.fused[t] ? '1' : '0';
    buf += '\n';
  }
  out << buf;
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

} // namespace nsd::eeg
