#pragma once

#include "std2p/correspond.hpp"
#include "std2p/error.hpp"
#include "std2p/eval.hpp"
#include "std2p/grid.hpp"
#include "std2p/io.hpp"
#include "std2p/learn.hpp"
#include "std2p/pipeline.hpp"
#include "std2p/pooling.hpp"
#include "std2p/rng.hpp"
#include "std2p/synthscene.hpp"
