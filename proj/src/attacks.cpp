#include "cansim/attacks.hpp"

#include <algorithm>
#include <memory>

namespace cansim {

namespace {

class FuzzSource final : public FrameSource {
 public:
  FuzzSource(FuzzAttack spec, std::int64_t start_us, std::string name)
      : spec_(std::move(spec)),
        rng_(spec_.seed),
        start_us_(start_us),
        period_us_(1'000'000 / spec_.frames_per_second),
        name_(std::move(name)) {}

  std::optional<ScheduledFrame> next(std::int64_t now_us) override {
    if (spec_.count && k_ >= *spec_.count) return std::nullopt;
    std::int64_t t = start_us_ + static_cast<std::int64_t>(k_) * period_us_;
    if (period_us_ > 0 && t < now_us) {
      k_ = static_cast<std::uint64_t>((now_us - start_us_ + period_us_ - 1) / period_us_);
      t = start_us_ + static_cast<std::int64_t>(k_) * period_us_;
    }
    ++k_;
    return ScheduledFrame{t, draw(), name_};
  }

  Frame draw() {
    FrameId id;
    if (!spec_.id_set.empty()) {
      id = spec_.id_set[rng_.below(static_cast<std::uint32_t>(spec_.id_set.size()))];
    } else {
      const auto span = spec_.id_range.max - spec_.id_range.min + 1;
      id = FrameId{spec_.id_range.min + rng_.below(span), spec_.id_range.kind};
    }
    const auto dlc = static_cast<std::uint8_t>(rng_.below(9));
    std::vector<std::uint8_t> data(dlc);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng_.below(256));
    return Frame{id, false, dlc, std::move(data)};
  }

 private:
  FuzzAttack spec_;
  FuzzRng rng_;
  std::int64_t start_us_;
  std::int64_t period_us_;
  std::string name_;
  std::uint64_t k_ = 0;
};

class ReplaySource final : public FrameSource {
 public:
  explicit ReplaySource(std::vector<ScheduledFrame> frames) : frames_(std::move(frames)) {}
  std::optional<ScheduledFrame> next(std::int64_t) override {
    if (pos_ >= frames_.size()) return std::nullopt;
    return frames_[pos_++];
  }

 private:
  std::vector<ScheduledFrame> frames_;
  std::size_t pos_ = 0;
};

void check_range(const FuzzAttack& spec) {
  if (spec.frames_per_second == 0) throw std::invalid_argument("fuzz rate must be positive");
  if (!spec.id_set.empty()) return;
  const auto max = spec.id_range.kind == IdKind::standard ? kMaxStandardId : kMaxExtendedId;
  if (spec.id_range.min > spec.id_range.max || spec.id_range.max > max) {
    throw std::invalid_argument("fuzz id_range outside identifier bounds");
  }
}

}  // namespace

PeriodicSource::PeriodicSource(ScheduledFrame first, std::int64_t period_us,
                               std::optional<std::uint64_t> count)
    : frame_(std::move(first)), period_us_(period_us), count_(count) {
  frame_.frame.validate();
}

std::optional<ScheduledFrame> PeriodicSource::next(std::int64_t now_us) {
  if (count_ && k_ >= *count_) return std::nullopt;
  std::int64_t t = frame_.time_us + static_cast<std::int64_t>(k_) * period_us_;
  if (period_us_ > 0 && t < now_us) {
    k_ = static_cast<std::uint64_t>((now_us - frame_.time_us + period_us_ - 1) / period_us_);
    if (count_ && k_ >= *count_) return std::nullopt;
    t = frame_.time_us + static_cast<std::int64_t>(k_) * period_us_;
  }
  ++k_;
  ScheduledFrame out = frame_;
  out.time_us = t;
  return out;
}

MergedSource::MergedSource(std::vector<std::unique_ptr<FrameSource>> sources)
    : sources_(std::move(sources)), heads_(sources_.size()), primed_(sources_.size(), false) {}

std::optional<ScheduledFrame> MergedSource::next(std::int64_t now_us) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    if (!primed_[i]) {
      heads_[i] = sources_[i]->next(now_us);
      primed_[i] = true;
    }
    if (heads_[i] && (!best || heads_[i]->time_us < heads_[*best]->time_us)) best = i;
  }
  if (!best) return std::nullopt;
  auto out = std::move(heads_[*best]);
  heads_[*best].reset();
  primed_[*best] = false;
  return out;
}

FrameSourceFactory merge_sources(std::vector<FrameSourceFactory> factories) {
  if (factories.size() == 1) return factories.front();
  return [factories]() -> std::unique_ptr<FrameSource> {
    std::vector<std::unique_ptr<FrameSource>> sources;
    for (const auto& f : factories) sources.push_back(f());
    return std::make_unique<MergedSource>(std::move(sources));
  };
}

FrameSourceFactory spoof_attacker(const SpoofAttack& spec, std::int64_t start_time_us,
                                  std::string name) {
  spec.frame.validate();
  if (spec.period_us < 0) throw std::invalid_argument("spoof period must be nonnegative");
  ScheduledFrame first{start_time_us, spec.frame, std::move(name)};
  return [first, spec]() -> std::unique_ptr<FrameSource> {
    return std::make_unique<PeriodicSource>(first, spec.period_us, spec.count);
  };
}

FrameSourceFactory fuzz_attacker(const FuzzAttack& spec, std::int64_t start_time_us,
                                 std::string name) {
  check_range(spec);
  return [spec, start_time_us, name]() -> std::unique_ptr<FrameSource> {
    return std::make_unique<FuzzSource>(spec, start_time_us, name);
  };
}

FrameSourceFactory replay_attacker(const ReplayAttack& spec, std::int64_t start_time_us) {
  std::vector<ScheduledFrame> frames;
  std::optional<std::int64_t> t0;
  for (const auto& r : spec.slice) {
    if (r.kind != TraceKind::frame_tx_start || !r.frame) continue;
    if (!t0) t0 = r.time_us;
    frames.push_back({start_time_us + (r.time_us - *t0), *r.frame, r.frame_name});
  }
  if (frames.empty()) throw EmptySlice("replay slice has no frame_tx_start records");
  return [frames]() -> std::unique_ptr<FrameSource> {
    return std::make_unique<ReplaySource>(frames);
  };
}

FrameSourceFactory attack_source(const AttackSpec& spec, std::int64_t start_time_us) {
  return std::visit(
      [&](const auto& a) -> FrameSourceFactory {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, SpoofAttack>) return spoof_attacker(a, start_time_us);
        if constexpr (std::is_same_v<T, FuzzAttack>) return fuzz_attacker(a, start_time_us);
        if constexpr (std::is_same_v<T, ReplayAttack>) return replay_attacker(a, start_time_us);
      },
      spec);
}

std::vector<Frame> fuzz_frames(const FuzzAttack& spec, std::size_t n) {
  check_range(spec);
  FuzzSource src(spec, 0, {});
  std::vector<Frame> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(src.draw());
  return out;
}

}  // namespace cansim
