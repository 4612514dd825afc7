# DelayHJB Core Module
