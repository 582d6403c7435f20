#include "fastwam/masks.hpp"

#include <array>

#include "fastwam/errors.hpp"

namespace fastwam {

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "train_fastwam") return MaskMode::TrainFastWam;
  if (s == "train_joint") return MaskMode::TrainJoint;
  if (s == "infer_fastwam") return MaskMode::InferFastWam;
  if (s == "infer_video_only") return MaskMode::InferVideoOnly;
  if (s == "infer_idm_action") return MaskMode::InferIdmAction;
  throw ConfigError("unknown mask mode: " + s);
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::TrainFastWam: return "train_fastwam";
    case MaskMode::TrainJoint: return "train_joint";
    case MaskMode::InferFastWam: return "infer_fastwam";
    case MaskMode::InferVideoOnly: return "infer_video_only";
    case MaskMode::InferIdmAction: return "infer_idm_action";
  }
  throw ConfigError("unknown mask mode");
}

GroupPresence mask_groups(MaskMode mode) {
  switch (mode) {
    case MaskMode::TrainFastWam:
    case MaskMode::TrainJoint:
    case MaskMode::InferIdmAction: return {true, true, true};
    case MaskMode::InferFastWam: return {true, false, true};
    case MaskMode::InferVideoOnly: return {true, true, false};
  }
  throw ConfigError("unknown mask mode");
}

namespace {

enum Group { kClean = 0, kFuture = 1, kAction = 2 };

bool group_allows(MaskMode mode, int qg, int kg) {
  if (qg == kClean) return kg == kClean;  // clean attends only to itself in every mode
  switch (mode) {
    case MaskMode::TrainFastWam:
      if (qg == kFuture) return kg == kClean || kg == kFuture;
      return kg == kClean || kg == kAction;  // action
    case MaskMode::TrainJoint:
      return true;  // future and action see everything
    case MaskMode::InferFastWam:
      return kg == kClean || kg == kAction;
    case MaskMode::InferVideoOnly:
      return kg == kClean || kg == kFuture;
    case MaskMode::InferIdmAction:
      if (qg == kFuture) return kg == kClean || kg == kFuture;
      return true;  // action sees C, F, A
  }
  return false;
}

}  // namespace

BoolMatrix build_mask(MaskMode mode, const TokenLayout& layout) {
  GroupPresence pres = mask_groups(mode);
  std::array<int, 3> counts = {pres.clean ? layout.n_clean : 0, pres.future ? layout.n_future : 0,
                               pres.action ? layout.n_action : 0};
  const int total = counts[0] + counts[1] + counts[2];
  if (total == 0) throw ConfigError("build_mask: layout has no tokens");

  auto group_of = [&](int idx) {
    if (idx < counts[0]) return kClean;
    if (idx < counts[0] + counts[1]) return kFuture;
    return kAction;
  };

  BoolMatrix m(total, total);
  for (int r = 0; r < total; ++r) {
    for (int c = 0; c < total; ++c) {
      m.set(r, c, group_allows(mode, group_of(r), group_of(c)));
    }
  }
  m.validate_no_empty_rows("build_mask(" + to_string(mode) + ")");
  return m;
}

std::string mask_to_text(const BoolMatrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.rows) * (m.cols + 1));
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) out.push_back(m.at(r, c) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

}  // namespace fastwam
