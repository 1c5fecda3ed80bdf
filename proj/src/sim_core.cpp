#include "lqgrid/sim_core.hpp"

#include <cmath>
#include <sstream>

namespace lqgrid {

std::string_view to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Tick: return "tick";
        case EventKind::WorkerStart: return "worker_start";
        case EventKind::WorkerEnd: return "worker_end";
        case EventKind::TaskCompletion: return "task_completion";
        case EventKind::ScenarioInjection: return "scenario_injection";
        case EventKind::FactoryTick: return "factory_tick";
        case EventKind::SamplingTick: return "sampling_tick";
    }
    return "unknown";
}

EventHandle Engine::schedule(Seconds fire_time, EventKind kind, std::function<void()> action) {
    if (!(fire_time >= clock_)) {
        std::ostringstream msg;
        msg << "cannot schedule " << to_string(kind) << " at t=" << fire_time
            << " before current clock " << clock_;
        throw SchedulingError(msg.str());
    }
    const EventHandle handle = next_seq_++;
    queue_.push(SimEvent{fire_time, handle, kind, std::move(action)});
    return handle;
}

RunStats Engine::run_until(Seconds t_end) {
    std::uint64_t fired_here = 0;
    while (!queue_.empty() && queue_.top().fire_time <= t_end) {
        // Ordering only reads the scalar keys, which survive the move.
        SimEvent ev = std::move(const_cast<SimEvent&>(queue_.top()));
        queue_.pop();
        clock_ = ev.fire_time;
        ++fired_;
        ++fired_here;
        if (ev.action) ev.action();
    }
    if (!queue_.empty() && t_end > clock_) clock_ = t_end;
    return RunStats{fired_here, clock_};
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RandomStream::RandomStream(std::uint64_t root_seed, std::string_view label)
    : root_seed_(root_seed), label_(label) {
    const std::uint64_t a = splitmix64(root_seed ^ splitmix64(fnv1a64(label)));
    const std::uint64_t b = splitmix64(a);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    bits_.seed(seq);
}

std::uint64_t RandomStream::next_u64() { return bits_(); }

double RandomStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomStream::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RandomStream::below: empty range");
    // Rejection keeps the draw unbiased for any n.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double RandomStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Marsaglia polar method.
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

double RandomStream::gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("gamma: shape and rate must be positive");
    if (shape < 1.0) {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        const double g = gamma(shape + 1.0, 1.0);
        return g * std::pow(uniform_pos(), 1.0 / shape) / rate;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform_pos();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
}

double RandomStream::lognormal(double median, double sigma) {
    return median * std::exp(sigma * normal());
}

}  // namespace lqgrid
