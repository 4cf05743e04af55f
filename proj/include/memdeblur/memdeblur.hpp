#ifndef MEMDEBLUR_MEMDEBLUR_HPP
#define MEMDEBLUR_MEMDEBLUR_HPP

#include "memdeblur/checkpoint.hpp"
#include "memdeblur/config.hpp"
#include "memdeblur/deblur_branch.hpp"
#include "memdeblur/evaluation.hpp"
#include "memdeblur/io.hpp"
#include "memdeblur/memory_bank.hpp"
#include "memdeblur/memory_codec.hpp"
#include "memdeblur/model.hpp"
#include "memdeblur/pipeline.hpp"
#include "memdeblur/training.hpp"

#endif
