#include "authex/behavior.hpp"

namespace authex::runtime {

BehaviorRegistry& BehaviorRegistry::global() {
  static BehaviorRegistry registry;
  return registry;
}

}  // namespace authex::runtime
