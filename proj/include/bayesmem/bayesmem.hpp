#pragma once

#include "bayesmem/classifier.hpp"
#include "bayesmem/density.hpp"
#include "bayesmem/error.hpp"
#include "bayesmem/feature_store.hpp"
#include "bayesmem/memory.hpp"
#include "bayesmem/protocol.hpp"
#include "bayesmem/protocol_io.hpp"
