# DelayHJB Utils Module
