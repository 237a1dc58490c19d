#pragma once

#include <functional>
#include <string>

#include "stepviz/error.hpp"

namespace stepviz {

enum class AttentionKind { self, cross };

struct LayerId {
  std::string stage = "C";
  int index = 0;
  AttentionKind kind = AttentionKind::self;

  std::string name() const {
    return stage + (kind == AttentionKind::self ? ".self." : ".cross.") + std::to_string(index);
  }
  bool operator==(const LayerId&) const = default;
};

// Self-attention layers of the text-conditioned stage. Decoder stages are never hooked.
inline bool conditioned_stage_self_attention(const LayerId& layer) {
  return layer.kind == AttentionKind::self && layer.stage == "C";
}

// Denoising steps are counted from 0 at the noisiest step.
struct AttentionSchedule {
  int total_steps = 20;
  int shared_steps = 15;
  std::function<bool(const LayerId&)> layer_filter = conditioned_stage_self_attention;

  void check() const {
    if (total_steps < 1) throw PreconditionViolation("total_steps must be >= 1");
    if (shared_steps < 0 || shared_steps > total_steps) {
      throw PreconditionViolation("shared_steps must lie in [0, total_steps]");
    }
  }
};

inline bool attention_router(const AttentionSchedule& schedule, int step, const LayerId& layer) {
  if (step < 0 || step >= schedule.total_steps) {
    throw PreconditionViolation("step " + std::to_string(step) + " outside [0, " +
                                std::to_string(schedule.total_steps) + ")");
  }
  if (step >= schedule.shared_steps) return false;
  return !schedule.layer_filter || schedule.layer_filter(layer);
}

}  // namespace stepviz
