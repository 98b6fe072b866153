#include "calicausal/types.hpp"

#include <stdexcept>

namespace calicausal {

std::vector<SlateSpan> group_slates(const std::vector<LoggedImpression>& log) {
  std::vector<SlateSpan> slates;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].position < 1) {
      throw std::invalid_argument("group_slates: position must be >= 1");
    }
    if (i > begin && log[i].position <= log[i - 1].position) {
      slates.push_back({begin, i});
      begin = i;
    }
  }
  if (begin < log.size()) slates.push_back({begin, log.size()});
  return slates;
}

}  // namespace calicausal
