#pragma once

#include <string>

#include "fastwam/tensor.hpp"
#include "fastwam/tokenize.hpp"

namespace fastwam {

// Structured attention masks over the token groups C=clean, F=future,
// A=action. Rows are queries, columns keys; only the groups present in
// the mode appear in the matrix.
//
//   train_fastwam    (C,F,A): C->C          F->C,F        A->C,A
//   train_joint      (C,F,A): C->C          F->C,F,A      A->C,F,A
//   infer_fastwam    (C,A):   C->C                        A->C,A
//   infer_video_only (C,F):   C->C          F->C,F
//   infer_idm_action (C,F,A): C->C          F->C,F        A->C,F,A
enum class MaskMode {
  TrainFastWam,
  TrainJoint,
  InferFastWam,
  InferVideoOnly,
  InferIdmAction,
};

MaskMode mask_mode_from_string(const std::string& s);
std::string to_string(MaskMode mode);

// Group presence per mode, canonical order [C, F, A].
struct GroupPresence {
  bool clean = false;
  bool future = false;
  bool action = false;
};
GroupPresence mask_groups(MaskMode mode);

BoolMatrix build_mask(MaskMode mode, const TokenLayout& layout);

// Text grid rendering ('1'/'0' per cell, one row per line) for golden
// files and the masks CLI.
std::string mask_to_text(const BoolMatrix& m);

}  // namespace fastwam
